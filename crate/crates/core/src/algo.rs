// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Accumulative vertex-centric algorithm model: a message generator, an
//! aggregator and the root messages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::VertexId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Min,
    Sum,
}

/// Per-sender quantities a message generator may read: out-degree and
/// out-weight sum in the original graph.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SenderContext {
    pub out_degree: u32,
    pub out_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Convergence {
    /// Run until no message changes any state.
    Exact,
    /// Residual mass bound; the engine converts it to a per-vertex threshold.
    Threshold(f64),
}

/// An accumulative algorithm. `generate` must be monotone for `Min` and linear
/// in the message for `Sum`; every state starts at the aggregation's bottom.
pub trait Algorithm: Send + Sync {
    fn name(&self) -> &str;

    fn aggregation(&self) -> Aggregation;

    /// Message sent along an edge of weight `w` by a sender carrying `m`.
    fn generate(&self, m: f64, w: f64, ctx: SenderContext) -> f64;

    /// Root message of `v`, or the bottom value when there is none.
    fn initial_message(&self, v: VertexId) -> f64;

    fn convergence(&self) -> Convergence;

    /// Absorbing vertices drop every arriving message.
    fn absorbs(&self, _v: VertexId) -> bool {
        false
    }

    fn bottom(&self) -> f64 {
        match self.aggregation() {
            Aggregation::Min => f64::INFINITY,
            Aggregation::Sum => 0.0,
        }
    }

    fn agg(&self, a: f64, b: f64) -> f64 {
        match self.aggregation() {
            Aggregation::Min => a.min(b),
            Aggregation::Sum => a + b,
        }
    }

    /// Neutral element of path composition: distance zero or factor one.
    fn ge_identity(&self) -> f64 {
        match self.aggregation() {
            Aggregation::Min => 0.0,
            Aggregation::Sum => 1.0,
        }
    }

    /// Applies an aggregated path weight to a message.
    fn combine(&self, m: f64, w: f64) -> f64 {
        match self.aggregation() {
            Aggregation::Min => m + w,
            Aggregation::Sum => m * w,
        }
    }

    /// The weight one edge contributes to a path: the additive offset for
    /// `Min` or the linear factor for `Sum`.
    fn edge_factor(&self, w: f64, ctx: SenderContext) -> f64 {
        self.generate(self.ge_identity(), w, ctx)
    }
}

/// Weighted single-source shortest paths.
#[derive(Clone, Debug)]
pub struct Sssp {
    pub source: VertexId,
}

impl Algorithm for Sssp {
    fn name(&self) -> &str {
        "sssp"
    }
    fn aggregation(&self) -> Aggregation {
        Aggregation::Min
    }
    fn generate(&self, m: f64, w: f64, _ctx: SenderContext) -> f64 {
        m + w
    }
    fn initial_message(&self, v: VertexId) -> f64 {
        if v == self.source {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn convergence(&self) -> Convergence {
        Convergence::Exact
    }
}

/// Hop distance from a source; edge weights are ignored.
#[derive(Clone, Debug)]
pub struct Bfs {
    pub source: VertexId,
}

impl Algorithm for Bfs {
    fn name(&self) -> &str {
        "bfs"
    }
    fn aggregation(&self) -> Aggregation {
        Aggregation::Min
    }
    fn generate(&self, m: f64, _w: f64, _ctx: SenderContext) -> f64 {
        m + 1.0
    }
    fn initial_message(&self, v: VertexId) -> f64 {
        if v == self.source {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn convergence(&self) -> Convergence {
        Convergence::Exact
    }
}

/// Delta-accumulative PageRank without normalisation: the fixpoint satisfies
/// `x_v = (1 - d) + d * sum(x_u / N_u)`. Dangling vertices emit nothing.
#[derive(Clone, Debug)]
pub struct PageRank {
    pub damping: f64,
    pub epsilon: f64,
}

impl Default for PageRank {
    fn default() -> Self {
        PageRank {
            damping: 0.85,
            epsilon: 1e-6,
        }
    }
}

impl Algorithm for PageRank {
    fn name(&self) -> &str {
        "pagerank"
    }
    fn aggregation(&self) -> Aggregation {
        Aggregation::Sum
    }
    fn generate(&self, m: f64, _w: f64, ctx: SenderContext) -> f64 {
        if ctx.out_degree == 0 {
            0.0
        } else {
            m * self.damping / ctx.out_degree as f64
        }
    }
    fn initial_message(&self, _v: VertexId) -> f64 {
        1.0 - self.damping
    }
    fn convergence(&self) -> Convergence {
        Convergence::Threshold(self.epsilon)
    }
}

/// Penalized hitting probability towards `source`, which absorbs arrivals.
#[derive(Clone, Debug)]
pub struct Php {
    pub source: VertexId,
    pub decay: f64,
    pub epsilon: f64,
}

impl Php {
    pub fn new(source: VertexId) -> Self {
        Php {
            source,
            decay: 0.85,
            epsilon: 1e-6,
        }
    }
}

impl Algorithm for Php {
    fn name(&self) -> &str {
        "php"
    }
    fn aggregation(&self) -> Aggregation {
        Aggregation::Sum
    }
    fn generate(&self, m: f64, w: f64, ctx: SenderContext) -> f64 {
        if ctx.out_weight <= 0.0 {
            0.0
        } else {
            self.decay * m * w / ctx.out_weight
        }
    }
    fn initial_message(&self, v: VertexId) -> f64 {
        if v == self.source {
            1.0
        } else {
            0.0
        }
    }
    fn convergence(&self) -> Convergence {
        Convergence::Threshold(self.epsilon)
    }
    fn absorbs(&self, v: VertexId) -> bool {
        v == self.source
    }
}

/// Built-in algorithm selector used by the command line and the test suites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Sssp,
    Bfs,
    PageRank,
    Php,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [
        AlgorithmKind::Sssp,
        AlgorithmKind::Bfs,
        AlgorithmKind::PageRank,
        AlgorithmKind::Php,
    ];

    pub fn build(self, source: VertexId) -> Box<dyn Algorithm> {
        match self {
            AlgorithmKind::Sssp => Box::new(Sssp { source }),
            AlgorithmKind::Bfs => Box::new(Bfs { source }),
            AlgorithmKind::PageRank => Box::new(PageRank::default()),
            AlgorithmKind::Php => Box::new(Php::new(source)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::Sssp => "sssp",
            AlgorithmKind::Bfs => "bfs",
            AlgorithmKind::PageRank => "pagerank",
            AlgorithmKind::Php => "php",
        }
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            AlgorithmKind::Sssp | AlgorithmKind::Bfs => Aggregation::Min,
            AlgorithmKind::PageRank | AlgorithmKind::Php => Aggregation::Sum,
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sssp" => Ok(AlgorithmKind::Sssp),
            "bfs" => Ok(AlgorithmKind::Bfs),
            "pagerank" | "pr" => Ok(AlgorithmKind::PageRank),
            "php" => Ok(AlgorithmKind::Php),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(n: u32, w: f64) -> SenderContext {
        SenderContext {
            out_degree: n,
            out_weight: w,
        }
    }

    #[test]
    fn identities() {
        for k in AlgorithmKind::ALL {
            let a = k.build(0);
            let w = 3.0;
            let c = ctx(4, 10.0);
            assert_eq!(a.agg(a.bottom(), 2.5), 2.5, "{k}");
            assert_eq!(
                a.combine(a.ge_identity(), a.edge_factor(w, c)),
                a.generate(a.ge_identity(), w, c),
                "{k}"
            );
        }
        let s = Sssp { source: 0 };
        assert_eq!(s.generate(f64::INFINITY, 2.0, ctx(1, 2.0)), f64::INFINITY);
        let p = Php::new(0);
        assert!((p.generate(1.0, 2.0, ctx(2, 4.0)) - 0.425).abs() < 1e-15);
        assert_eq!("PageRank".parse::<AlgorithmKind>(), Ok(AlgorithmKind::PageRank));
    }

    proptest! {
        #[test]
        fn min_generators_are_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0, w in 0.1f64..10.0) {
            for k in [AlgorithmKind::Sssp, AlgorithmKind::Bfs] {
                let s = k.build(0);
                let c = ctx(3, 7.0);
                prop_assert_eq!(s.generate(a.min(b), w, c), s.generate(a, w, c).min(s.generate(b, w, c)));
            }
        }

        #[test]
        fn sum_generators_are_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, w in 0.1f64..10.0, n in 1u32..20) {
            for k in [AlgorithmKind::PageRank, AlgorithmKind::Php] {
                let s = k.build(0);
                let c = ctx(n, w * n as f64);
                let lhs = s.generate(a + b, w, c);
                let rhs = s.generate(a, w, c) + s.generate(b, w, c);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
                prop_assert!((s.generate(a, w, c) - a * s.edge_factor(w, c)).abs() <= 1e-12);
            }
        }
    }
}
